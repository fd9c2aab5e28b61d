"""
Aggregation of tracks into typed units.

Hypotheses ("these tracks form a unit of type A or B") are grown one track at
a time and kept while they fit some template and stay compact. Hypotheses
that share a track are inconsistent; chains of inconsistency split the
problem into independent sub-problems, and in each one the complete,
consistent set of hypotheses with the lowest combined conflict is searched
depth first.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from itertools import combinations
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .conflict import ConflictConfig, RampParams, positions_at, track_conflict_matrix
from .domain import (ClassificationTree, Position, Report, SituationPicture, Track, Unit,
                     UnitCandidate, UnitTemplate)
from .errors import InadmissibleHypothesisError

logger = logging.getLogger(__name__)

UNAGGREGATED = "unaggregated"


@dataclass(frozen=True)
class ClassifyConfig:
    """
    Parameters of hypothesis generation and selection.

    Args:
        keep_threshold: hypotheses need a conflict below this to be selected,
            and a formation conflict below it to be grown further
        present_delta: disjuncts within this of the best one are presented too
        fallback_conflict: conflict of the singleton "unaggregated" hypothesis
        max_per_track: keep only the m best hypotheses of each size per track
        pair_limit: discard an extension if the new track conflicts this much
            with any member (None: use keep_threshold)
    """
    keep_threshold: float = 0.5
    present_delta: float = 0.05
    fallback_conflict: float = 0.5
    max_per_track: Optional[int] = None
    pair_limit: Optional[float] = None

    def __post_init__(self):
        for name in ("keep_threshold", "fallback_conflict"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.present_delta < 0:
            raise ValueError(f"present_delta must be >= 0, got {self.present_delta}")
        if self.max_per_track is not None and self.max_per_track < 1:
            raise ValueError(f"max_per_track must be >= 1, got {self.max_per_track}")

    @property
    def effective_pair_limit(self) -> float:
        return self.keep_threshold if self.pair_limit is None else self.pair_limit


@dataclass(frozen=True)
class Disjunct:
    unit_type: str
    classification_conflict: float
    support: float
    conflict: float


@dataclass(frozen=True)
class Hypothesis:
    """
    "Tracks ``members`` form a unit of one of the disjunct types."

    The conflict of the hypothesis is the smallest disjunct conflict; all
    disjuncts share the formation conflict of the members.
    """
    members: Tuple[str, ...]
    disjuncts: Tuple[Disjunct, ...]
    formation_conflict: float

    def __post_init__(self):
        if not self.members:
            raise ValueError("Hypothesis needs at least one member")
        if not self.disjuncts:
            raise ValueError(f"Hypothesis {self.members} needs at least one disjunct")
        if not 0.0 <= self.formation_conflict <= 1.0:
            raise ValueError(f"Formation conflict {self.formation_conflict} outside [0, 1]")
        for d in self.disjuncts:
            if not (0.0 <= d.classification_conflict <= 1.0 and 0.0 <= d.conflict <= 1.0):
                raise ValueError(f"Disjunct {d} of {self.members} has a conflict outside [0, 1]")

    @classmethod
    def build(cls, members: Sequence[str], evaluations: Sequence[Tuple[str, float, float]],
              formation: float) -> 'Hypothesis':
        """Build from (unit_type, c0, support) triples and the formation conflict."""
        disjuncts = tuple(Disjunct(unit_type, c0, support, hypothesis_conflict(c0, formation))
                          for unit_type, c0, support in evaluations)
        return cls(tuple(members), disjuncts, formation)

    @cached_property
    def member_set(self) -> FrozenSet[str]:
        return frozenset(self.members)

    @cached_property
    def sorted_members(self) -> Tuple[str, ...]:
        return tuple(sorted(self.members))

    @property
    def conflict(self) -> float:
        return evaluate_disjunction(self)

    @property
    def best(self) -> Disjunct:
        return min(self.disjuncts, key=lambda d: (d.conflict, d.unit_type))

    @property
    def is_fallback(self) -> bool:
        return len(self.disjuncts) == 1 and self.disjuncts[0].unit_type == UNAGGREGATED


@dataclass(frozen=True)
class SubProblem:
    """Hypotheses linked by chains of shared tracks, and the tracks they cover."""
    hypotheses: Tuple[Hypothesis, ...]
    tracks: FrozenSet[str]


@dataclass(frozen=True)
class HypothesisSet:
    """Pairwise consistent hypotheses with their combined conflict."""
    hypotheses: Tuple[Hypothesis, ...]
    conflict: float

    @classmethod
    def of(cls, hypotheses: Sequence[Hypothesis]) -> 'HypothesisSet':
        """
        Canonical set: hypotheses ordered by member ids, conflict recomputed.

        Raises:
            ValueError: if two hypotheses share a track
        """
        ordered = tuple(sorted(hypotheses, key=lambda h: h.sorted_members))
        for a, b in combinations(ordered, 2):
            if conflicts_with(a, b):
                raise ValueError(f"Hypotheses {a.members} and {b.members} share a track")
        return cls(ordered, set_conflict(ordered))

    @property
    def tracks(self) -> FrozenSet[str]:
        return frozenset(m for h in self.hypotheses for m in h.members)

    def sort_key(self):
        return (self.conflict, len(self.hypotheses), tuple(h.sorted_members for h in self.hypotheses))


@dataclass
class DecisionLog:
    """What the solver pruned and how much it explored."""
    generated: int = 0
    pruned: List[Tuple[Tuple[str, ...], str]] = field(default_factory=list)
    capped: int = 0
    above_threshold: int = 0
    subproblems: int = 0
    explored_nodes: int = 0
    complete_sets: int = 0

    def to_dict(self) -> dict:
        return {
            "generated": self.generated,
            "capped": self.capped,
            "above_threshold": self.above_threshold,
            "subproblems": self.subproblems,
            "explored_nodes": self.explored_nodes,
            "complete_sets": self.complete_sets,
            "pruned": [{"members": list(m), "reason": reason} for m, reason in self.pruned],
        }


def _class_depth(tree: ClassificationTree, class_id: str) -> int:
    # unit types used as classes at higher levels rank above every vehicle class
    if class_id in tree:
        return tree.depth(class_id)
    return len(tree) + 1


def _compatible(tree: ClassificationTree, member: str, slot: str) -> bool:
    if member in tree and slot in tree:
        return tree.is_descendant(member, slot)
    return member == slot


def _definitely_fills(tree: ClassificationTree, member: str, slot: str) -> bool:
    if member in tree and slot in tree:
        return tree.is_ancestor_or_self(slot, member)
    return member == slot


def classification_conflict(member_classes: Sequence[str], template: UnitTemplate,
                            tree: ClassificationTree) -> Tuple[float, float]:
    """
    Fit of the member classes to a template's slots.

    Members are matched greedily, most specific first, to an unfilled slot
    they certainly fill, else to one they may fill (a coarser class). The
    conflict is ``1 - members / expected`` and the support counts only the
    certain matches.

    Returns:
        (classification conflict c0, support)

    Raises:
        InadmissibleHypothesisError: if there are more members than slots or a
            member fits no free slot
    """
    slots = template.slots()
    if len(member_classes) > len(slots):
        raise InadmissibleHypothesisError(
            f"{len(member_classes)} members exceed the {len(slots)} of '{template.unit_type}'")
    order = sorted(member_classes, key=lambda c: (-_class_depth(tree, c), c))
    filled = [False] * len(slots)
    definite = 0
    for member in order:
        choice = next((s for s, slot in enumerate(slots)
                       if not filled[s] and _definitely_fills(tree, member, slot)), None)
        if choice is not None:
            definite += 1
        else:
            choice = next((s for s, slot in enumerate(slots)
                           if not filled[s] and _compatible(tree, member, slot)), None)
        if choice is None:
            raise InadmissibleHypothesisError(
                f"No free slot of '{template.unit_type}' accepts a '{member}'")
        filled[choice] = True
    expected = len(slots)
    return 1.0 - len(member_classes) / expected, definite / expected


def formation_conflict(members: Sequence, track_conflict_fn: Callable) -> float:
    """Mean pairwise conflict of the members (0 for a singleton)."""
    pairs = list(combinations(members, 2))
    if not pairs:
        return 0.0
    return float(sum(track_conflict_fn(a, b) for a, b in pairs) / len(pairs))


def hypothesis_conflict(c0: float, c1: float) -> float:
    """Classification and formation conflict combined: ``1 - (1 - c0)(1 - c1)``."""
    return 1.0 - (1.0 - c0) * (1.0 - c1)


def evaluate_disjunction(hypothesis: Hypothesis) -> float:
    """Conflict of the best disjunct."""
    c1 = hypothesis.formation_conflict
    return min(hypothesis_conflict(d.classification_conflict, c1) for d in hypothesis.disjuncts)


def set_conflict(hypotheses: Sequence[Hypothesis]) -> float:
    """Combined conflict of a set of hypotheses, ``1 - prod(1 - C(H))``."""
    remaining = 1.0
    for h in hypotheses:
        remaining *= 1.0 - h.conflict
    return 1.0 - remaining


def conflicts_with(h1: Hypothesis, h2: Hypothesis) -> bool:
    """Two hypotheses conflict iff they share a track."""
    return not h1.member_set.isdisjoint(h2.member_set)


def fallback_hypothesis(track_id: str, conflict: float = 0.5) -> Hypothesis:
    """Singleton hypothesis leaving a track unaggregated."""
    return Hypothesis((track_id,), (Disjunct(UNAGGREGATED, conflict, 0.0, conflict),), 0.0)


def _cap_per_track(layer: Dict[Tuple[int, ...], Hypothesis], m: int) -> Dict[Tuple[int, ...], Hypothesis]:
    ranked = sorted(layer.items(), key=lambda item: (item[1].conflict, item[0]))
    kept = set()
    counts: Dict[int, int] = {}
    for idx, _ in ranked:
        for i in idx:
            if counts.get(i, 0) < m:
                counts[i] = counts.get(i, 0) + 1
                kept.add(idx)
    return {idx: h for idx, h in layer.items() if idx in kept}


def generate_hypotheses(tracks: Sequence[Track], templates: Sequence[UnitTemplate],
                        config: ClassifyConfig = None, tree: ClassificationTree = None,
                        conflict_config: ConflictConfig = None,
                        track_conflicts: np.ndarray = None, level: int = 1,
                        element_classes: Dict[str, str] = None,
                        decision_log: DecisionLog = None) -> List[Hypothesis]:
    """
    Grow hypotheses from single tracks, one track at a time.

    A hypothesis survives (and is grown further) when it is admissible for
    at least one template of ``level`` and its formation conflict is below the
    keep threshold. Extensions whose new track conflicts with a member at or
    above the pair limit are discarded before evaluation. Each surviving
    hypothesis carries every template it is admissible for as a disjunct.

    Args:
        tracks: elements to aggregate
        templates: unit templates (only those at ``level`` are used)
        config: generation parameters
        tree: classification tree
        conflict_config: track conflict parameters, used when
            ``track_conflicts`` is not given
        track_conflicts: precomputed (n, n) track conflict matrix
        level: template level to generate hypotheses for
        element_classes: class of each element id (default: resolved_class)
        decision_log: collects pruning decisions

    Returns:
        hypotheses ordered by size, then by track order
    """
    config = config or ClassifyConfig()
    tree = tree or ClassificationTree.default()
    log = decision_log if decision_log is not None else DecisionLog()
    ids = [t.id for t in tracks]
    classes = element_classes or {t.id: t.resolved_class for t in tracks}
    level_templates = [t for t in templates if t.level == level]
    if track_conflicts is None:
        track_conflicts = track_conflict_matrix(tracks, conflict_config or ConflictConfig())
    keep, pair_limit = config.keep_threshold, config.effective_pair_limit

    def evaluate(idx: Tuple[int, ...]) -> Optional[Hypothesis]:
        member_classes = [classes[ids[i]] for i in idx]
        evaluations = []
        for template in level_templates:
            try:
                c0, support = classification_conflict(member_classes, template, tree)
            except InadmissibleHypothesisError:
                continue
            evaluations.append((template.unit_type, c0, support))
        if not evaluations:
            log.pruned.append((tuple(ids[i] for i in idx), "type"))
            return None
        c1 = formation_conflict(idx, lambda a, b: track_conflicts[a, b])
        if c1 >= keep:
            log.pruned.append((tuple(ids[i] for i in idx), "formation"))
            return None
        return Hypothesis.build([ids[i] for i in idx], evaluations, c1)

    layer: Dict[Tuple[int, ...], Hypothesis] = {}
    for i in range(len(ids)):
        h = evaluate((i,))
        if h is not None:
            layer[(i,)] = h
    generated = [layer[idx] for idx in sorted(layer)]
    visited = set(layer)

    while layer:
        next_layer: Dict[Tuple[int, ...], Hypothesis] = {}
        for idx in sorted(layer):
            for j in range(len(ids)):
                if j in idx:
                    continue
                extended = tuple(sorted(idx + (j,)))
                if extended in visited:
                    continue
                visited.add(extended)
                if any(track_conflicts[j, i] >= pair_limit for i in idx):
                    log.pruned.append((tuple(ids[i] for i in extended), "distance"))
                    continue
                h = evaluate(extended)
                if h is not None:
                    next_layer[extended] = h
        if config.max_per_track is not None:
            capped = _cap_per_track(next_layer, config.max_per_track)
            log.capped += len(next_layer) - len(capped)
            next_layer = capped
        generated.extend(next_layer[idx] for idx in sorted(next_layer))
        layer = next_layer

    log.generated += len(generated)
    logger.debug("Generated %d hypotheses from %d elements (%d pruned)",
                 len(generated), len(ids), len(log.pruned))
    return generated


def partition_problem_space(hypotheses: Sequence[Hypothesis]) -> List[SubProblem]:
    """
    Split hypotheses into sub-problems connected by chains of shared tracks.

    Sub-problems are ordered by their first hypothesis; hypotheses keep their
    input order inside a sub-problem.
    """
    if not hypotheses:
        return []
    track_index: Dict[str, int] = {}
    rows, cols = [], []
    for h_idx, h in enumerate(hypotheses):
        for member in h.members:
            rows.append(h_idx)
            cols.append(track_index.setdefault(member, len(track_index)))
    incidence = csr_matrix((np.ones(len(rows)), (rows, cols)),
                           shape=(len(hypotheses), len(track_index)))
    shared = incidence @ incidence.T
    _, labels = connected_components(shared, directed=False)

    groups: Dict[int, List[Hypothesis]] = {}
    for label, h in zip(labels, hypotheses):
        groups.setdefault(int(label), []).append(h)
    return [SubProblem(tuple(group), frozenset(m for h in group for m in h.members))
            for group in groups.values()]


def best_consistent_set(subproblem: SubProblem, decision_log: DecisionLog = None) -> HypothesisSet:
    """
    Complete consistent hypothesis set with the lowest combined conflict.

    Depth first over index-ordered consistent extensions: starting from an
    empty set, each hypothesis later in the (conflict-sorted) list that is
    consistent with the current set is appended in turn; a set covering every
    track is a candidate. Branches that can no longer beat the best candidate
    or can no longer cover every track are cut. Ties go to fewer hypotheses,
    then to the lexicographically smaller member ids.
    """
    log = decision_log if decision_log is not None else DecisionLog()
    hypotheses = sorted(subproblem.hypotheses, key=lambda h: (h.conflict, h.sorted_members))
    objects = subproblem.tracks
    best: List[Optional[HypothesisSet]] = [None]

    def search(current: List[int], covered: FrozenSet[str], remaining: float, rest: List[int]):
        log.explored_nodes += 1
        if covered == objects:
            log.complete_sets += 1
            candidate = HypothesisSet.of([hypotheses[i] for i in current])
            if best[0] is None or candidate.sort_key() < best[0].sort_key():
                best[0] = candidate
            return
        if best[0] is not None:
            conflict_now = 1.0 - remaining
            if conflict_now > best[0].conflict + 1e-12:
                return
            if conflict_now >= best[0].conflict and len(current) >= len(best[0].hypotheses):
                return
        reachable = covered.union(*(hypotheses[j].member_set for j in rest))
        if reachable != objects:
            return
        for pos, i in enumerate(rest):
            h = hypotheses[i]
            extended = covered | h.member_set
            next_rest = [j for j in rest[pos + 1:] if hypotheses[j].member_set.isdisjoint(extended)]
            search(current + [i], extended, remaining * (1.0 - h.conflict), next_rest)

    search([], frozenset(), 1.0, list(range(len(hypotheses))))
    if best[0] is None:
        raise ValueError("Sub-problem has no complete consistent hypothesis set")
    return best[0]


def enumerate_best_set(subproblem: SubProblem) -> HypothesisSet:
    """Exhaustive reference for best_consistent_set (small sub-problems only)."""
    hypotheses = list(subproblem.hypotheses)
    best = None
    for size in range(1, len(hypotheses) + 1):
        for chosen in combinations(hypotheses, size):
            if any(conflicts_with(a, b) for a, b in combinations(chosen, 2)):
                continue
            if frozenset(m for h in chosen for m in h.members) != subproblem.tracks:
                continue
            candidate = HypothesisSet.of(chosen)
            if best is None or candidate.sort_key() < best.sort_key():
                best = candidate
    if best is None:
        raise ValueError("Sub-problem has no complete consistent hypothesis set")
    return best


def _to_unit(unit_id: str, hypothesis: Hypothesis, present_delta: float, level: int) -> Unit:
    best = hypothesis.conflict
    presented = sorted((d for d in hypothesis.disjuncts if d.conflict - best <= present_delta),
                       key=lambda d: (d.conflict, d.unit_type))
    candidates = tuple(UnitCandidate(d.unit_type, d.conflict, d.classification_conflict, d.support)
                       for d in presented)
    return Unit(unit_id, hypothesis.members, candidates, hypothesis.formation_conflict, level)


def classify_units(tracks: Sequence[Track], templates: Sequence[UnitTemplate],
                   config: ClassifyConfig = None, tree: ClassificationTree = None,
                   conflict_config: ConflictConfig = None, level: int = 1,
                   element_classes: Dict[str, str] = None,
                   decision_log: DecisionLog = None, id_prefix: str = "U") -> SituationPicture:
    """
    Aggregate tracks into units: generate, partition, solve, assemble.

    Hypotheses with a conflict below the keep threshold compete with one
    fallback "unaggregated" hypothesis per track. Tracks that end up covered
    only by their fallback are listed as unaggregated.
    """
    config = config or ClassifyConfig()
    tree = tree or ClassificationTree.default()
    log = decision_log if decision_log is not None else DecisionLog()
    tracks = list(tracks)
    if not tracks:
        return SituationPicture((), (), ())

    generated = generate_hypotheses(tracks, templates, config, tree, conflict_config,
                                    level=level, element_classes=element_classes,
                                    decision_log=log)
    eligible = [h for h in generated if h.conflict < config.keep_threshold]
    log.above_threshold += len(generated) - len(eligible)
    fallbacks = [fallback_hypothesis(t.id, config.fallback_conflict) for t in tracks]
    subproblems = partition_problem_space(eligible + fallbacks)
    log.subproblems += len(subproblems)

    chosen: List[Hypothesis] = []
    for subproblem in subproblems:
        chosen.extend(best_consistent_set(subproblem, log).hypotheses)

    position = {t.id: k for k, t in enumerate(tracks)}
    chosen.sort(key=lambda h: min(position[m] for m in h.members))
    units: List[Unit] = []
    unaggregated: List[str] = []
    for h in chosen:
        if h.is_fallback:
            unaggregated.extend(h.members)
        else:
            members = tuple(sorted(h.members, key=position.get))
            units.append(_to_unit(f"{id_prefix}{len(units) + 1}", replace(h, members=members),
                                  config.present_delta, level))
    unaggregated.sort(key=position.get)
    logger.info("Level %d: %d hypotheses (%d eligible), %d sub-problems, %d units, %d unaggregated",
                level, len(generated), len(eligible), len(subproblems), len(units), len(unaggregated))
    return SituationPicture(tuple(tracks), tuple(units), tuple(unaggregated))


def centroid_track(element_id: str, tracks: Sequence[Track], resolved_class: str) -> Track:
    """
    Track following the mean position of member tracks.

    Sampled at every member report time inside the members' common span; with
    no common span the members' reports are pooled instead.
    """
    start = max(t.start for t in tracks)
    end = min(t.end for t in tracks)
    orientations = [r.orientation for t in tracks for r in t.reports]
    heading = math.atan2(sum(math.sin(o) for o in orientations),
                         sum(math.cos(o) for o in orientations))
    if start <= end:
        times = np.unique(np.concatenate([t.times for t in tracks]))
        times = times[(times >= start) & (times <= end)]
        mean_xy = np.mean([positions_at(t, times) for t in tracks], axis=0)
        reports = tuple(Report(element_id, None, Position(float(x), float(y)), float(ts),
                               "unknown", heading)
                        for ts, (x, y) in zip(times, mean_xy))
    else:
        reports = tuple(sorted((r for t in tracks for r in t.reports), key=lambda r: r.time))
    return Track(element_id, reports, resolved_class)


def level_conflict_config(templates: Sequence[UnitTemplate], level: int,
                          base: ConflictConfig = None) -> ConflictConfig:
    """Distance ramp stretched by the ratio of the level's widest spacing to the platoon spacing."""
    base = base or ConflictConfig()
    widest = max((t.spacing_max for t in templates if t.level == level), default=None)
    platoon = max((t.spacing_max for t in templates if t.level == 1), default=None)
    if widest is None or platoon is None or widest <= platoon:
        return base
    scale = widest / platoon
    d = base.distance
    return replace(base, distance=RampParams(d.p, d.x1 * scale, d.x2 * scale))


def aggregate_higher_level(picture: SituationPicture, templates: Sequence[UnitTemplate],
                           config: ClassifyConfig = None, tree: ClassificationTree = None,
                           conflict_config: ConflictConfig = None, level: int = 2,
                           decision_log: DecisionLog = None) -> SituationPicture:
    """
    Experimental: aggregate a picture's units and unaggregated tracks one level up.

    Units enter as centroid tracks classed by their best unit type,
    unaggregated tracks as themselves. The result is attached as
    ``higher_level`` of the returned picture.
    """
    elements: List[Track] = []
    classes: Dict[str, str] = {}
    for unit in picture.units:
        elements.append(centroid_track(unit.id, [picture.track(m) for m in unit.members],
                                       unit.unit_type))
        classes[unit.id] = unit.unit_type
    for track_id in picture.unaggregated:
        track = picture.track(track_id)
        elements.append(track)
        classes[track_id] = track.resolved_class
    if conflict_config is None:
        conflict_config = level_conflict_config(templates, level)
    upper = classify_units(elements, templates, config, tree, conflict_config, level=level,
                           element_classes=classes, decision_log=decision_log, id_prefix="C")
    return replace(picture, higher_level=upper)
