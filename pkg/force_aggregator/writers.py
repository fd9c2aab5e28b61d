import csv
import json
from pathlib import Path
from typing import Optional

from .classify import DecisionLog
from .domain import PathLike, SituationPicture
from .pipeline import AggregationResult


def write_json(data, filename: PathLike) -> None:
    """Write a JSON document with a stable layout (same data, same bytes)."""
    with open(filename, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, indent=2)
        f.write("\n")


class TrackWriter:
    def __init__(self, result: AggregationResult = None):
        """
        Initialize a writer for the output of the aggregate stage.

        Args:
            result: aggregation result holding the tracks and the cluster-count search
        """
        self.result = result

    def _require_result(self) -> AggregationResult:
        if self.result is None:
            raise ValueError("Aggregation result is not set. Initialize the writer with a result.")
        return self.result

    def write_tracks(self, filename: PathLike) -> None:
        """
        Write the tracks document: chosen K, metaconflict and every track with its conflict.

        Args:
            filename: output file name
        """
        write_json(self._require_result().to_dict(), filename)

    def write_trace(self, filename: PathLike) -> Optional[Path]:
        """
        Write the annealing convergence trace of the chosen K as CSV.

        The weight of conflict per K goes next to it into ``<stem>_k_curve.csv``.

        Args:
            filename: output file name

        Returns:
            path of the K curve file, or None for an empty log
        """
        selection = self._require_result().selection
        with open(filename, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["k", "sweep", "temperature", "saturation"])
            if selection is not None:
                for row in selection.anneal.trace:
                    writer.writerow([selection.K, row.sweep, repr(row.temperature), repr(row.saturation)])
        if selection is None:
            return None

        path = Path(filename)
        curve_path = path.with_name(f"{path.stem}_k_curve.csv")
        with open(curve_path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["k", "total_weight", "frozen"])
            for k, weight in selection.curve:
                writer.writerow([k, repr(weight), int(k not in selection.unfrozen)])
        return curve_path


class SituationWriter:
    def __init__(self, picture: SituationPicture = None, decision_log: DecisionLog = None):
        """
        Initialize a writer for the output of the classify stage.

        Args:
            picture: situation picture to write
            decision_log: solver decisions collected while classifying (optional)
        """
        self.picture = picture
        self.decision_log = decision_log

    def write_picture(self, filename: PathLike) -> None:
        if self.picture is None:
            raise ValueError("Situation picture is not set. Initialize the writer with a picture.")
        write_json(self.picture.to_dict(), filename)

    def write_decision_log(self, filename: PathLike) -> None:
        if self.decision_log is None:
            raise ValueError("Decision log is not set. Initialize the writer with a decision log.")
        write_json(self.decision_log.to_dict(), filename)
