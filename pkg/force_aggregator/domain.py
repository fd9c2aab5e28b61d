"""
Core data types of the aggregation pipeline.

Reports are single observations of a vehicle, tracks are time-ordered groups of
reports attributed to one vehicle, templates describe the expected composition
of unit types and a SituationPicture is the final partition of tracks into
units. The module also reads and writes the report log (JSON-lines or CSV) and
the JSON documents for classification trees, templates, tracks and pictures.
"""
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .errors import ClassificationError, ReportLogError, TemplateError

logger = logging.getLogger(__name__)

ROOT_CLASS = "unknown"
TWO_PI = 2.0 * math.pi

# unknown -> {tracked, wheeled}; tracked -> {mbt, apc_tracked, atgm_launcher}
DEFAULT_TREE_PARENTS = {
    "tracked": ROOT_CLASS,
    "wheeled": ROOT_CLASS,
    "mbt": "tracked",
    "apc_tracked": "tracked",
    "atgm_launcher": "tracked",
}

REPORT_KEYS = ("from", "name", "position", "time", "classification", "orientation")
CSV_COLUMNS = ("from", "name", "x", "y", "time", "classification", "orientation")

PathLike = Union[str, Path]


def normalize_angle(angle: float) -> float:
    """Map an angle in radians into [0, 2*pi)."""
    wrapped = float(angle) % TWO_PI
    # -1e-20 % 2pi rounds to 2pi
    if wrapped >= TWO_PI:
        wrapped = 0.0
    return wrapped


@dataclass(frozen=True)
class Position:
    """Planar position in meters (x east, y north)."""
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"Position coordinates must be finite, got ({self.x}, {self.y})")

    def distance_to(self, other: 'Position') -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y}


@dataclass(frozen=True)
class Report:
    """
    One timestamped observation of a vehicle.

    The ``name`` field is the ground-truth vehicle id. Aggregation never reads
    it; it only exists so that results can be scored.

    Args:
        observer: id of the observer that produced the report ("from" in the log)
        name: ground-truth vehicle id or None
        position: observed position
        time: seconds since scenario start, >= 0
        classification: node id in the ClassificationTree
        orientation: heading in radians, normalized into [0, 2*pi)
    """
    observer: str
    name: Optional[str]
    position: Position
    time: float
    classification: str
    orientation: float

    def __post_init__(self):
        if not math.isfinite(self.time) or self.time < 0:
            raise ValueError(f"Report time must be a finite value >= 0, got {self.time}")
        if not math.isfinite(self.orientation):
            raise ValueError(f"Report orientation must be finite, got {self.orientation}")
        object.__setattr__(self, "orientation", normalize_angle(self.orientation))

    def to_dict(self) -> dict:
        return {
            "from": self.observer,
            "name": self.name,
            "position": self.position.to_dict(),
            "time": self.time,
            "classification": self.classification,
            "orientation": self.orientation,
        }

    @classmethod
    def from_dict(cls, data: dict, tree: 'ClassificationTree' = None,
                  line: int = None) -> 'Report':
        """
        Build a report from its log dictionary.

        Args:
            data: mapping with exactly the log keys
            tree: classification tree used to validate the class id
            line: line number used in error messages

        Raises:
            ReportLogError: on missing, unexpected or malformed fields
        """
        if not isinstance(data, dict):
            raise ReportLogError("record is not a JSON object", line=line)
        for key in REPORT_KEYS:
            if key not in data:
                raise ReportLogError("missing field", line=line, field=key)
        for key in data:
            if key not in REPORT_KEYS:
                raise ReportLogError("unexpected field", line=line, field=key)
        position = data["position"]
        if not isinstance(position, dict) or set(position) != {"x", "y"}:
            raise ReportLogError("expected an object with keys x and y", line=line, field="position")
        return _build_report(
            observer=data["from"], name=data["name"],
            x=position["x"], y=position["y"], time=data["time"],
            classification=data["classification"], orientation=data["orientation"],
            tree=tree, line=line,
        )


class ClassificationTree:
    """
    Vehicle classes ordered in a tree with ``unknown`` as root.

    A report classified as a node is compatible with every report classified
    as one of the node's ancestors or descendants.
    """
    def __init__(self, parent: Dict[str, str], root: str = ROOT_CLASS):
        """
        Args:
            parent: mapping child class -> parent class for every non-root node
            root: root class id, must be "unknown"

        Raises:
            ClassificationError: if the mapping does not describe a single tree
        """
        if root != ROOT_CLASS:
            raise ClassificationError(f"Tree root must be '{ROOT_CLASS}', got '{root}'")
        if root in parent:
            raise ClassificationError(f"Root '{root}' cannot have a parent")
        nodes = {root, *parent}
        for child, par in parent.items():
            if par not in nodes:
                raise ClassificationError(f"Parent '{par}' of '{child}' is not a tree node")

        self.root = root
        self.parent = dict(parent)
        self.nodes = frozenset(nodes)
        self._paths: Dict[str, Tuple[str, ...]] = {}
        for node in sorted(self.nodes):
            path = [node]
            while path[-1] != root:
                path.append(self.parent[path[-1]])
                if len(path) > len(self.nodes):
                    raise ClassificationError(f"Cycle in classification tree at '{node}'")
            self._paths[node] = tuple(path)

    def __contains__(self, class_id) -> bool:
        return class_id in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def check(self, class_id: str) -> str:
        if class_id not in self.nodes:
            raise ClassificationError(f"Unknown classification '{class_id}'")
        return class_id

    def ancestors(self, class_id: str) -> Tuple[str, ...]:
        """Path from ``class_id`` (inclusive) up to the root (inclusive)."""
        return self._paths[self.check(class_id)]

    def depth(self, class_id: str) -> int:
        return len(self.ancestors(class_id)) - 1

    def children(self, class_id: str) -> List[str]:
        self.check(class_id)
        return sorted(child for child, par in self.parent.items() if par == class_id)

    def is_ancestor_or_self(self, ancestor: str, class_id: str) -> bool:
        self.check(ancestor)
        return ancestor in self.ancestors(class_id)

    def is_descendant(self, a: str, b: str) -> bool:
        """True if a and b lie on one root path (either direction, or equal)."""
        return self.is_ancestor_or_self(a, b) or self.is_ancestor_or_self(b, a)

    def truncate(self, class_id: str, depth: Optional[int]) -> str:
        """Coarsen a class to its ancestor at ``depth`` (None keeps full depth)."""
        path = self.ancestors(class_id)
        if depth is None or depth >= len(path) - 1:
            return class_id
        return path[len(path) - 1 - max(depth, 0)]

    def to_dict(self) -> dict:
        return {"root": self.root, "parent": dict(sorted(self.parent.items()))}

    @classmethod
    def from_dict(cls, data: dict) -> 'ClassificationTree':
        if not isinstance(data, dict) or "parent" not in data:
            raise ClassificationError("Tree document needs a 'parent' mapping")
        return cls(dict(data["parent"]), root=data.get("root", ROOT_CLASS))

    @classmethod
    def default(cls) -> 'ClassificationTree':
        return cls(DEFAULT_TREE_PARENTS)


def load_tree(path: PathLike) -> ClassificationTree:
    """Read a classification tree JSON document."""
    with open(path, encoding="utf-8") as f:
        return ClassificationTree.from_dict(json.load(f))


def is_descendant(a: str, b: str, tree: ClassificationTree) -> bool:
    """
    Check whether two classes are related in the classification tree.

    Raises:
        ClassificationError: if either id is not in the tree
    """
    return tree.is_descendant(a, b)


def resolve_class(reports: Iterable[Union[Report, str]], tree: ClassificationTree) -> str:
    """
    Return the deepest class among reports whose classes lie on one root path.

    Args:
        reports: reports or bare class ids
        tree: classification tree

    Raises:
        ClassificationError: if the set is empty or two classes are unrelated
    """
    classes = {r.classification if isinstance(r, Report) else r for r in reports}
    if not classes:
        raise ClassificationError("Cannot resolve the class of an empty report set")
    deepest = max(sorted(classes), key=tree.depth)
    line = tree.ancestors(deepest)
    for class_id in sorted(classes):
        if class_id not in line:
            raise ClassificationError(
                f"Classes '{class_id}' and '{deepest}' are not related; they cannot form one track")
    return deepest


@dataclass(frozen=True)
class Track:
    """
    Reports attributed to one vehicle, sorted by time.

    Positions between reports are linearly interpolated (see
    ``conflict.position_at``).
    """
    id: str
    reports: Tuple[Report, ...]
    resolved_class: str
    report_ids: Tuple[int, ...] = ()

    def __post_init__(self):
        if not self.reports:
            raise ValueError(f"Track '{self.id}' has no reports")
        times = [r.time for r in self.reports]
        if any(t1 > t2 for t1, t2 in zip(times, times[1:])):
            raise ValueError(f"Reports of track '{self.id}' are not sorted by time")
        if self.report_ids and len(self.report_ids) != len(self.reports):
            raise ValueError(f"Track '{self.id}' has {len(self.report_ids)} report ids "
                             f"for {len(self.reports)} reports")

    @classmethod
    def from_reports(cls, track_id: str, reports: Sequence[Report], tree: ClassificationTree,
                     report_ids: Sequence[int] = None) -> 'Track':
        """
        Build a track, sorting the reports by time (stable) and resolving its class.

        Raises:
            ClassificationError: if two member classes are unrelated
        """
        if report_ids is None:
            order = sorted(range(len(reports)), key=lambda i: reports[i].time)
            ids: Tuple[int, ...] = ()
        else:
            order = sorted(range(len(reports)), key=lambda i: (reports[i].time, report_ids[i]))
            ids = tuple(int(report_ids[i]) for i in order)
        ordered = tuple(reports[i] for i in order)
        return cls(track_id, ordered, resolve_class(ordered, tree), ids)

    @cached_property
    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.reports], dtype=float)

    @cached_property
    def xy(self) -> np.ndarray:
        return np.array([[r.position.x, r.position.y] for r in self.reports], dtype=float)

    @property
    def start(self) -> float:
        return self.reports[0].time

    @property
    def end(self) -> float:
        return self.reports[-1].time

    def to_dict(self, conflict: float = None) -> dict:
        data = {
            "id": self.id,
            "resolved_class": self.resolved_class,
            "report_ids": list(self.report_ids),
        }
        if conflict is not None:
            data["conflict"] = conflict
        data["reports"] = [r.to_dict() for r in self.reports]
        return data

    @classmethod
    def from_dict(cls, data: dict, tree: ClassificationTree) -> 'Track':
        reports = [Report.from_dict(r, tree) for r in data["reports"]]
        report_ids = data.get("report_ids") or None
        track = cls.from_reports(str(data["id"]), reports, tree, report_ids)
        stored = data.get("resolved_class")
        if stored is not None and stored != track.resolved_class:
            raise ClassificationError(
                f"Track '{track.id}' claims class '{stored}' but its reports resolve to "
                f"'{track.resolved_class}'")
        return track


@dataclass(frozen=True)
class UnitTemplate:
    """
    Expected composition of a unit type.

    Args:
        unit_type: template name, e.g. "mech_platoon"
        composition: (class id, required count) pairs; at level 2 the class id
            may name a lower-level unit type
        spacing_min: smallest expected distance between members (m)
        spacing_max: largest expected distance between members (m)
        level: 1 = platoon, 2 = company, ...
    """
    unit_type: str
    composition: Tuple[Tuple[str, int], ...]
    spacing_min: float = 50.0
    spacing_max: float = 200.0
    level: int = 1

    def __post_init__(self):
        composition = tuple((str(c), int(n)) for c, n in self.composition)
        object.__setattr__(self, "composition", composition)
        if not composition:
            raise TemplateError(f"Template '{self.unit_type}' has an empty composition")
        for class_id, count in composition:
            if count < 1:
                raise TemplateError(
                    f"Template '{self.unit_type}' requires {count} x '{class_id}'; counts must be >= 1")
        if not self.spacing_min < self.spacing_max:
            raise TemplateError(f"Template '{self.unit_type}' needs spacing_min < spacing_max")
        if self.level < 1:
            raise TemplateError(f"Template '{self.unit_type}' has level {self.level} < 1")

    @property
    def expected_total(self) -> int:
        return sum(count for _, count in self.composition)

    def slots(self) -> Tuple[str, ...]:
        """One class id per expected member."""
        return tuple(c for c, count in self.composition for _ in range(count))

    def to_dict(self) -> dict:
        return {
            "unit_type": self.unit_type,
            "composition": [[c, n] for c, n in self.composition],
            "spacing_min": self.spacing_min,
            "spacing_max": self.spacing_max,
            "level": self.level,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'UnitTemplate':
        try:
            return cls(
                unit_type=str(data["unit_type"]),
                composition=tuple(tuple(item) for item in data["composition"]),
                spacing_min=float(data.get("spacing_min", 50.0)),
                spacing_max=float(data.get("spacing_max", 200.0)),
                level=int(data.get("level", 1)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, TemplateError):
                raise
            raise TemplateError(f"Malformed template {data!r}: {exc}") from exc


def default_templates() -> List[UnitTemplate]:
    """
    Platoon and company templates of a mechanized battalion.

    The company's "MBT platoon or anti-tank platoon" alternative is expressed
    as two level-2 templates. The commander vehicle is an apc_tracked.
    """
    return [
        UnitTemplate("mech_platoon", (("apc_tracked", 4),), 50.0, 200.0, 1),
        UnitTemplate("mbt_platoon", (("mbt", 5),), 50.0, 200.0, 1),
        UnitTemplate("at_platoon", (("atgm_launcher", 5),), 50.0, 200.0, 1),
        UnitTemplate("mech_company_mbt",
                     (("apc_tracked", 1), ("mech_platoon", 3), ("mbt_platoon", 1)),
                     200.0, 2000.0, 2),
        UnitTemplate("mech_company_at",
                     (("apc_tracked", 1), ("mech_platoon", 3), ("at_platoon", 1)),
                     200.0, 2000.0, 2),
    ]


def templates_by_type(templates: Iterable[UnitTemplate]) -> Dict[str, UnitTemplate]:
    lookup = {}
    for template in templates:
        if template.unit_type in lookup:
            raise TemplateError(f"Duplicate template '{template.unit_type}'")
        lookup[template.unit_type] = template
    return lookup


def find_template(templates: Iterable[UnitTemplate], unit_type: str) -> UnitTemplate:
    lookup = templates_by_type(templates)
    if unit_type not in lookup:
        raise TemplateError(f"No template for unit type '{unit_type}'")
    return lookup[unit_type]


def load_templates(path: PathLike) -> List[UnitTemplate]:
    """Read templates from ``{"templates": [...]}`` or a bare JSON list."""
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if isinstance(data, dict):
        data = data.get("templates")
    if not isinstance(data, list):
        raise TemplateError(f"{path}: expected a list of templates")
    templates = [UnitTemplate.from_dict(item) for item in data]
    templates_by_type(templates)
    return templates


@dataclass(frozen=True)
class UnitCandidate:
    """One unit type a group of tracks may form, with its evaluation."""
    unit_type: str
    conflict: float
    classification_conflict: float
    support: float

    def to_dict(self) -> dict:
        return {
            "unit_type": self.unit_type,
            "conflict": self.conflict,
            "classification_conflict": self.classification_conflict,
            "support": self.support,
        }


@dataclass(frozen=True)
class Unit:
    """A group of tracks with its presented unit type disjunction (best first)."""
    id: str
    members: Tuple[str, ...]
    candidates: Tuple[UnitCandidate, ...]
    formation_conflict: float
    level: int = 1

    def __post_init__(self):
        if not self.members:
            raise ValueError(f"Unit '{self.id}' has no members")
        if not self.candidates:
            raise ValueError(f"Unit '{self.id}' has no candidate types")

    @property
    def conflict(self) -> float:
        return min(c.conflict for c in self.candidates)

    @property
    def unit_type(self) -> str:
        return min(self.candidates, key=lambda c: (c.conflict, c.unit_type)).unit_type

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "level": self.level,
            "members": list(self.members),
            "conflict": self.conflict,
            "formation_conflict": self.formation_conflict,
            "candidates": [c.to_dict() for c in self.candidates],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'Unit':
        return cls(
            id=str(data["id"]),
            members=tuple(data["members"]),
            candidates=tuple(UnitCandidate(c["unit_type"], float(c["conflict"]),
                                           float(c["classification_conflict"]),
                                           float(c["support"]))
                             for c in data["candidates"]),
            formation_conflict=float(data["formation_conflict"]),
            level=int(data.get("level", 1)),
        )


@dataclass(frozen=True)
class SituationPicture:
    """
    Tracks partitioned into units and unaggregated tracks.

    Every track id appears in exactly one unit or in ``unaggregated``.
    ``higher_level`` optionally holds the next aggregation level, whose
    elements are this picture's units and unaggregated tracks.
    """
    tracks: Tuple[Track, ...]
    units: Tuple[Unit, ...]
    unaggregated: Tuple[str, ...]
    higher_level: Optional['SituationPicture'] = field(default=None, compare=False)

    def __post_init__(self):
        track_ids = [t.id for t in self.tracks]
        if len(set(track_ids)) != len(track_ids):
            raise ValueError("Duplicate track ids in situation picture")
        placed = [m for unit in self.units for m in unit.members] + list(self.unaggregated)
        if sorted(placed) != sorted(track_ids):
            raise ValueError("Every track must appear in exactly one unit or in unaggregated")

    def track(self, track_id: str) -> Track:
        for t in self.tracks:
            if t.id == track_id:
                return t
        raise KeyError(track_id)

    def to_dict(self) -> dict:
        data = {
            "tracks": [t.to_dict() for t in self.tracks],
            "units": [u.to_dict() for u in self.units],
            "unaggregated": list(self.unaggregated),
        }
        if self.higher_level is not None:
            data["higher_level"] = {
                "units": [u.to_dict() for u in self.higher_level.units],
                "unaggregated": list(self.higher_level.unaggregated),
            }
        return data

    @classmethod
    def from_dict(cls, data: dict, tree: ClassificationTree) -> 'SituationPicture':
        return cls(
            tracks=tuple(Track.from_dict(t, tree) for t in data.get("tracks", [])),
            units=tuple(Unit.from_dict(u) for u in data.get("units", [])),
            unaggregated=tuple(data.get("unaggregated", [])),
        )


def read_situation_picture(path: PathLike, tree: ClassificationTree = None) -> SituationPicture:
    with open(path, encoding="utf-8") as f:
        return SituationPicture.from_dict(json.load(f), tree or ClassificationTree.default())


def read_tracks(path: PathLike, tree: ClassificationTree = None) -> List[Track]:
    """Read the tracks document written by the aggregate stage."""
    tree = tree or ClassificationTree.default()
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if isinstance(data, dict):
        data = data.get("tracks", [])
    return [Track.from_dict(item, tree) for item in data]


def _to_float(value, field_name: str, line: Optional[int]) -> float:
    if isinstance(value, bool):
        raise ReportLogError(f"expected a number, got {value!r}", line=line, field=field_name)
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ReportLogError(f"expected a number, got {value!r}", line=line, field=field_name) from None
    if not math.isfinite(number):
        raise ReportLogError(f"expected a finite number, got {value!r}", line=line, field=field_name)
    return number


def _build_report(observer, name, x, y, time, classification, orientation,
                  tree: Optional[ClassificationTree], line: Optional[int]) -> Report:
    if not isinstance(observer, str) or not observer:
        raise ReportLogError(f"expected a non-empty string, got {observer!r}", line=line, field="from")
    if name is not None and not isinstance(name, str):
        raise ReportLogError(f"expected a string or null, got {name!r}", line=line, field="name")
    if not isinstance(classification, str):
        raise ReportLogError(f"expected a string, got {classification!r}", line=line,
                             field="classification")
    if tree is not None and classification not in tree:
        raise ReportLogError(f"unknown classification '{classification}'", line=line,
                             field="classification")
    position = Position(_to_float(x, "position.x", line), _to_float(y, "position.y", line))
    seconds = _to_float(time, "time", line)
    if seconds < 0:
        raise ReportLogError(f"time must be >= 0, got {seconds}", line=line, field="time")
    return Report(observer, name, position, seconds, classification,
                  _to_float(orientation, "orientation", line))


def parse_report_log(stream: Iterable[str], tree: ClassificationTree = None) -> List[Report]:
    """
    Parse a report log, one report per line, order preserved.

    JSON-lines is the primary format. If the first non-blank line is not a JSON
    object the stream is read as CSV with the header
    ``from,name,x,y,time,classification,orientation``.

    Args:
        stream: iterable of lines (an open text file works)
        tree: classification tree used to validate class ids (default tree if None)

    Raises:
        ReportLogError: naming the line number and field of the first bad record
    """
    tree = tree or ClassificationTree.default()
    lines = list(stream)
    first = next((ln for ln in lines if ln.strip()), None)
    if first is None:
        return []
    if not first.lstrip().startswith("{"):
        return _parse_csv_log(lines, tree)

    reports = []
    for lineno, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ReportLogError(f"invalid JSON ({exc.msg})", line=lineno) from None
        reports.append(Report.from_dict(data, tree, line=lineno))
    return reports


def _parse_csv_log(lines: List[str], tree: ClassificationTree) -> List[Report]:
    reader = csv.DictReader(lines)
    header = tuple(reader.fieldnames or ())
    if set(header) != set(CSV_COLUMNS):
        raise ReportLogError(f"CSV header must contain exactly {', '.join(CSV_COLUMNS)}", line=1)
    reports = []
    for row in reader:
        if None in row or any(v is None for v in row.values()):
            raise ReportLogError("wrong number of columns", line=reader.line_num)
        reports.append(_build_report(
            observer=row["from"], name=row["name"] or None,
            x=row["x"], y=row["y"], time=row["time"],
            classification=row["classification"], orientation=row["orientation"],
            tree=tree, line=reader.line_num,
        ))
    return reports


def serialize_report(report: Report) -> str:
    """One JSON-lines record with the log's key order."""
    return json.dumps(report.to_dict())


def write_report_log(reports: Iterable[Report], stream: TextIO) -> None:
    for report in reports:
        stream.write(serialize_report(report))
        stream.write("\n")


def read_report_log(path: PathLike, tree: ClassificationTree = None) -> List[Report]:
    with open(path, encoding="utf-8") as f:
        return parse_report_log(f, tree)


def save_report_log(reports: Iterable[Report], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        write_report_log(reports, f)
