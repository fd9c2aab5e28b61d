"""
The two aggregation stages: reports -> tracks and tracks -> units.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .classify import DecisionLog, aggregate_higher_level, classify_units
from .config import PipelineConfig
from .conflict import report_conflict_matrix
from .domain import ClassificationTree, Report, SituationPicture, Track, UnitTemplate
from .dsclust import (ClusterCountResult, InteractionMatrix, Partition, cluster_conflicts,
                      select_cluster_count, weight_of_conflict)
from .errors import NonConvergenceError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AggregationResult:
    """
    Tracks built from a report log.

    ``conflicts[i]`` is the remaining conflict inside ``tracks[i]``;
    ``metaconflict`` combines them as ``1 - prod(1 - c)``.
    """
    tracks: Tuple[Track, ...]
    conflicts: Tuple[float, ...]
    selection: Optional[ClusterCountResult]
    repaired: int = 0

    @property
    def metaconflict(self) -> float:
        return 1.0 - float(np.prod([1.0 - c for c in self.conflicts]))

    @property
    def total_weight(self) -> float:
        return sum(weight_of_conflict(c) for c in self.conflicts)

    def to_dict(self) -> dict:
        selection = self.selection
        return {
            "k": selection.K if selection else 0,
            "accepted": selection.accepted if selection else True,
            "unfrozen_k": list(selection.unfrozen) if selection else [],
            "metaconflict": self.metaconflict,
            "total_weight": self.total_weight,
            "repaired_clusters": self.repaired,
            "tracks": [t.to_dict(conflict=c) for t, c in zip(self.tracks, self.conflicts)],
        }


def split_by_class(indices: Sequence[int], reports: Sequence[Report],
                   tree: ClassificationTree) -> List[List[int]]:
    """
    Split a cluster into class-consistent groups.

    Each most specific class in the cluster opens a group; a report of a
    coarser class joins the first group (by class id) whose class descends
    from it. A consistent cluster comes back as a single group.
    """
    classes = {reports[i].classification for i in indices}
    leaves = sorted(c for c in classes
                    if not any(o != c and tree.is_ancestor_or_self(c, o) for o in classes))
    if len(leaves) <= 1:
        return [list(indices)]
    groups: Dict[str, List[int]] = {leaf: [] for leaf in leaves}
    for i in indices:
        c = reports[i].classification
        leaf = next(leaf for leaf in leaves if tree.is_ancestor_or_self(c, leaf))
        groups[leaf].append(i)
    return [groups[leaf] for leaf in leaves]


def aggregate_reports(reports: Sequence[Report], config: PipelineConfig = None,
                      tree: ClassificationTree = None) -> AggregationResult:
    """
    Cluster reports into vehicle tracks.

    Pairwise report conflicts feed the cluster-count search; clusters that
    still mix unrelated classes are split before their tracks are built.
    Track ids T1, T2, ... follow the position of each track's first report in
    the log.

    Raises:
        NonConvergenceError: if no K was accepted while some K never froze
    """
    config = config or PipelineConfig()
    tree = tree or config.tree()
    reports = list(reports)
    if not reports:
        logger.info("Empty report log; no tracks")
        return AggregationResult((), (), None)

    conflicts = report_conflict_matrix(reports, config.conflict, tree)
    interactions = InteractionMatrix.from_conflicts(conflicts)
    selection = select_cluster_count(interactions, conflicts, config.k_max,
                                     config.cluster_threshold, config.anneal_config)
    if not selection.accepted and selection.unfrozen:
        raise NonConvergenceError(
            f"No K was accepted and annealing did not freeze for K={list(selection.unfrozen)}",
            state=selection.anneal.state, critical_temperature=selection.anneal.critical_temperature)

    groups: List[List[int]] = []
    repaired = 0
    for members in selection.partition.clusters():
        pieces = split_by_class([int(i) for i in members], reports, tree)
        if len(pieces) > 1:
            repaired += 1
            logger.warning("Cluster of %d reports mixes unrelated classes; split into %d tracks",
                           len(members), len(pieces))
        groups.extend(pieces)
    groups.sort(key=min)

    tracks = []
    for number, group in enumerate(groups, start=1):
        tracks.append(Track.from_reports(f"T{number}", [reports[i] for i in group], tree,
                                         report_ids=group))
    assignment = np.empty(len(reports), dtype=int)
    for label, group in enumerate(groups):
        assignment[group] = label
    track_conflicts = cluster_conflicts(Partition(assignment, len(groups)), conflicts)

    result = AggregationResult(tuple(tracks), tuple(track_conflicts), selection, repaired)
    logger.info("Aggregated %d reports into %d tracks (K=%d, metaconflict %.4g)",
                len(reports), len(tracks), selection.K, result.metaconflict)
    return result


def classify_tracks(tracks: Sequence[Track], config: PipelineConfig = None,
                    templates: Sequence[UnitTemplate] = None, tree: ClassificationTree = None,
                    company: bool = False, decision_log: DecisionLog = None) -> SituationPicture:
    """Aggregate tracks into platoons, and optionally the platoons into companies."""
    config = config or PipelineConfig()
    tree = tree or config.tree()
    templates = list(templates) if templates is not None else config.templates()
    picture = classify_units(tracks, templates, config.classify, tree, config.conflict,
                             decision_log=decision_log)
    if company:
        picture = aggregate_higher_level(picture, templates, config.classify, tree,
                                         decision_log=decision_log)
    return picture
