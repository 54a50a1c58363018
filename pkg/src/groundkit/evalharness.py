"""Grounding dataset loading, IoU, and Acc@thr evaluation.

Dataset files are JSONL: one object per line with keys image, phrase,
box: [y1, y2, y3, y4] (inclusive corners in original image pixels) and an
optional split tag. A prediction counts as correct when IoU is strictly
greater than the threshold.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .boxsearch import BoundingBox
from .errors import CoordinateError, ParameterError

# default Acc@thr thresholds by dataset kind
DATASET_THRESHOLDS = {"flickr": 0.5, "vg": 0.3}


@dataclass
class GroundingRecord:
    image_path: str
    phrase: str
    gt_box: BoundingBox
    split_tag: str | None = None


@dataclass
class RecordResult:
    index: int
    iou: float | None
    correct: bool
    score: float | None = None
    error: str | None = None


@dataclass
class EvalReport:
    accuracy: float
    threshold: float
    evaluated: int
    errors: int
    rows: list[RecordResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "threshold": self.threshold,
            "evaluated": self.evaluated,
            "errors": self.errors,
            "records": [
                {
                    "index": r.index,
                    "iou": r.iou,
                    "correct": r.correct,
                    "score": r.score,
                    "error": r.error,
                }
                for r in self.rows
            ],
        }


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union with inclusive-pixel areas; 0 when disjoint."""
    ih = min(a.y3, b.y3) - max(a.y1, b.y1) + 1
    iw = min(a.y4, b.y4) - max(a.y2, b.y2) + 1
    if ih <= 0 or iw <= 0:
        return 0.0
    inter = ih * iw
    return inter / (a.area + b.area - inter)


def load_dataset(path: str | Path) -> tuple[list[GroundingRecord], list[str]]:
    """Parse a JSONL dataset; malformed lines are reported, not fatal."""
    records: list[GroundingRecord] = []
    errors: list[str] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                box = obj["box"]
                records.append(
                    GroundingRecord(
                        image_path=str(obj["image"]),
                        phrase=str(obj["phrase"]),
                        gt_box=BoundingBox(*(int(v) for v in box)),
                        split_tag=obj.get("split"),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, CoordinateError) as e:
                errors.append(f"line {lineno}: {e}")
    return records, errors


def max_workers() -> int:
    cap = os.environ.get("GROUNDKIT_THREADS")
    if cap:
        return max(1, int(cap))
    return min(8, os.cpu_count() or 1)


def evaluate(
    records: list[GroundingRecord],
    predictor: Callable[[GroundingRecord], BoundingBox | tuple[BoundingBox, float]],
    thr: float,
) -> EvalReport:
    """Run the predictor over all records and report Acc@thr.

    Records whose prediction raises are counted in the errors tally and
    excluded from the accuracy denominator; report rows keep input order.
    """
    if not 0 < thr < 1:
        raise ParameterError(f"threshold must be in (0, 1), got {thr}")

    def run(item: tuple[int, GroundingRecord]) -> RecordResult:
        idx, rec = item
        try:
            pred = predictor(rec)
        except Exception as e:
            return RecordResult(index=idx, iou=None, correct=False, error=str(e))
        score = None
        if isinstance(pred, tuple):
            pred, score = pred
        val = iou(pred, rec.gt_box)
        return RecordResult(index=idx, iou=val, correct=val > thr, score=score)

    with ThreadPoolExecutor(max_workers=max_workers()) as pool:
        rows = list(pool.map(run, enumerate(records)))

    failed = sum(1 for r in rows if r.error is not None)
    evaluated = len(rows) - failed
    correct = sum(1 for r in rows if r.correct)
    accuracy = correct / evaluated if evaluated else 0.0
    return EvalReport(accuracy=accuracy, threshold=thr, evaluated=evaluated, errors=failed, rows=rows)
