from .domain import (ClassificationTree, Position, Report, SituationPicture, Track, Unit,
                     UnitCandidate, UnitTemplate, default_templates, load_templates, load_tree,
                     parse_report_log, read_report_log, save_report_log)
from .conflict import ConflictConfig, report_conflict, track_conflict
from .dsclust import AnnealConfig, InteractionMatrix, anneal, metaconflict, select_cluster_count
from .classify import ClassifyConfig, Hypothesis, aggregate_higher_level, classify_units
from .scengen import GroundTruth, ScenarioSpec, generate_scenario, score
from .config import PipelineConfig, load_config
from .pipeline import aggregate_reports, classify_tracks
from .writers import SituationWriter, TrackWriter
from .errors import ForceAggregationError

__version__ = "0.1.0"

__all__ = ['ClassificationTree', 'Position', 'Report', 'SituationPicture', 'Track', 'Unit',
           'UnitCandidate', 'UnitTemplate', 'default_templates', 'load_templates', 'load_tree',
           'parse_report_log', 'read_report_log', 'save_report_log',
           'ConflictConfig', 'report_conflict', 'track_conflict',
           'AnnealConfig', 'InteractionMatrix', 'anneal', 'metaconflict', 'select_cluster_count',
           'ClassifyConfig', 'Hypothesis', 'aggregate_higher_level', 'classify_units',
           'GroundTruth', 'ScenarioSpec', 'generate_scenario', 'score',
           'PipelineConfig', 'load_config', 'aggregate_reports', 'classify_tracks',
           'SituationWriter', 'TrackWriter', 'ForceAggregationError']
